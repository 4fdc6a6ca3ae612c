// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crowd/density.hpp"
#include "crowd/eval.hpp"
#include "crowd/model.hpp"
#include "crowd/parallel.hpp"
#include "crowd/train.hpp"
#include "support/gradcheck.hpp"
#include "support/random.hpp"

using namespace crowd;
using testing_support::random_tensor;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), sizeof(T) * a.size()) == 0;
}

std::string fmt(double v, int precision = 6) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

// ------------------------------------------------------------ criterion 1

Outcome parameter_ladder() {
    // Closed form for uniform width C: stem 3x3x3xC, 6 convs of 3x3xCxC per
    // module, 1x1 reconstruction Cx1.
    const std::size_t C = 16;
    auto closed_form = [&](std::size_t modules) { return 9 * 3 * C + modules * 6 * 9 * C * C + C; };
    // Published PARAMS column, in millions.
    const std::map<Arch, std::pair<std::size_t, const char*>> expected = {
        {Arch::resnet14, {closed_form(2), "0.028"}}, {Arch::resnet20, {closed_form(3), "0.042"}},
        {Arch::resnet26, {closed_form(4), "0.056"}}, {Arch::r_resnet, {closed_form(2), "0.028"}},
        {Arch::dr_resnet, {closed_form(2), "0.028"}}};
    const std::map<Arch, std::size_t> literal = {{Arch::resnet14, 28096}, {Arch::resnet20, 41920},
                                                 {Arch::resnet26, 55744}, {Arch::r_resnet, 28096},
                                                 {Arch::dr_resnet, 28096}};
    Outcome o{true, ""};
    for (const auto& [arch, want] : expected) {
        const auto m = Model<float>::build({arch, C, 3}, 0);
        const std::size_t got = m.count_parameters(CountMode::conv_weights);
        char millions[16];
        std::snprintf(millions, sizeof millions, "%.3f", static_cast<double>(got) / 1e6);
        const bool ok = got == want.first && got == literal.at(arch) && want.second == std::string(millions);
        o.pass = o.pass && ok;
        o.detail += to_string(arch) + "=" + std::to_string(got) + "(" + millions + "M) ";
    }
    return o;
}

// ------------------------------------------------------------ criterion 2

Outcome depth_law() {
    std::size_t dr = 0, r14 = 0;
    Model<float>::build({Arch::dr_resnet, 16, 3}, 0).infer(Tensor4({1, 3, 8, 8}), &dr);
    Model<float>::build({Arch::resnet14, 16, 3}, 0).infer(Tensor4({1, 3, 8, 8}), &r14);
    auto m = Model<float>::build({Arch::dr_resnet, 16, 3}, 0);
    m.forward(Tensor4({1, 3, 8, 8}), Mode::train);
    const bool ok = dr == 26 && r14 == 14 && m.conv_applications() == 26;
    return {ok, "dr_resnet=" + std::to_string(dr) + " resnet14=" + std::to_string(r14) +
                    " train-forward=" + std::to_string(m.conv_applications())};
}

// ------------------------------------------------------------ criterion 3

void tie_modules(Model<float>& tied) {
    auto& store = tied.parameters();
    for (int m = 3; m <= 4; ++m)
        for (std::size_t b = 0; b < kBlocksPerModule; ++b) {
            const std::string from = "module2.block" + std::to_string(b) + ".";
            const std::string to = "module" + std::to_string(m) + ".block" + std::to_string(b) + ".";
            for (const char* n : {"conv1", "conv2"}) store.conv(to + n) = store.conv(from + n);
            for (const char* n : {"bn1", "bn2"}) store.batchnorm(to + n) = store.batchnorm(from + n);
        }
}

Outcome tied_unroll() {
    auto dr = Model<float>::build({Arch::dr_resnet, 16, 3}, 2024);
    // Settle running statistics so eval mode is not trivially the identity normalization.
    for (int i = 0; i < 5; ++i) dr.forward(random_tensor<float>({2, 3, 32, 32}, 500 + i), Mode::train);
    auto tied = Model<float>::build({Arch::resnet26, 16, 3}, 7);
    copy_parameters(dr, tied);
    tie_modules(tied);

    std::size_t identical = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto x = random_tensor<float>({1, 3, 32, 32}, s);
        const bool eval_same = same_bits(dr.infer(x), tied.infer(x));
        const bool train_same = same_bits(dr.forward(x, Mode::train), tied.forward(x, Mode::train));
        if (eval_same && train_same) ++identical;
        const auto g = random_tensor<float>({1, 1, 8, 8}, 100 + s);
        dr.backward(g);
        tied.backward(g);
    }

    // Gradients accumulated over all ten backward passes.
    std::map<std::string, std::span<const float>> tg;
    for (auto& l : tied.parameters().learnables()) tg[l.name] = l.tensor->grad();
    double worst = 0.0;
    for (auto& l : dr.parameters().learnables()) {
        const auto got = l.tensor->grad();
        const bool shared = l.name.starts_with("module2.");
        const std::string tail = l.name.substr(l.name.find('.') + 1);
        for (std::size_t i = 0; i < got.size(); ++i) {
            double want;
            if (shared) {
                want = static_cast<double>(tg["module2." + tail][i]) + tg["module3." + tail][i] +
                       tg["module4." + tail][i];
            } else {
                want = tg[l.name][i];
            }
            // Relative to the tensor's own gradient scale, since float sums
            // taken in different orders differ by rounding.
            double scale = 1e-8;
            for (float v : got) scale = std::max(scale, static_cast<double>(std::abs(v)));
            worst = std::max(worst, std::abs(got[i] - want) / scale);
        }
    }
    const bool ok = identical == 10 && worst < 1e-6;
    return {ok, std::to_string(identical) + "/10 inputs bit-identical (eval and train), max grad rel err " +
                    fmt(worst, 3)};
}

// ------------------------------------------------------------ criterion 4

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> copy(std::span<const double> s) { return {s.begin(), s.end()}; }

struct PrimitiveResult {
    double worst = 0.0;
    double worst_analytic = 0.0;
};

PrimitiveResult primitive_gradients(double step) {
    PrimitiveResult res;
    auto note = [&](const gradcheck::Report& r) {
        if (r.max_error > res.worst) res = {r.max_error, r.worst_analytic};
    };

    for (std::size_t k : {1u, 3u}) {
        auto p = make_conv<double>(3, 2, k, true);
        p.weight = random_tensor<double>(p.weight.shape(), 1);
        *p.bias = random_tensor<double>(p.bias->shape(), 2);
        auto x = random_tensor<double>({2, 2, 4, 4}, 3);
        const auto r = random_tensor<double>({2, 3, 4, 4}, 4);
        const auto gx = conv2d_backward(x, r, p);
        auto loss = [&] { return dot(conv2d(x, p), r); };
        note(gradcheck::check(x.values(), gx.values(), loss, {}, step));
        note(gradcheck::check(p.weight.values(), copy(p.weight.grad()), loss, {}, step));
        note(gradcheck::check(p.bias->values(), copy(p.bias->grad()), loss, {}, step));
    }
    for (Mode mode : {Mode::train, Mode::eval}) {
        auto p = make_batchnorm<double>(3);
        p.gamma = random_tensor<double>(p.gamma.shape(), 5);
        p.beta = random_tensor<double>(p.beta.shape(), 6);
        BatchNormStats<double> st{{0.2, -0.1, 0.4}, {1.3, 0.8, 2.1}};
        auto x = random_tensor<double>({2, 3, 4, 4}, 7);
        const auto r = random_tensor<double>(x.shape(), 8);
        auto fwd = [&](BatchNormCache<double>* c) {
            auto s = st;
            return batchnorm(x, p, s, mode, c);
        };
        BatchNormCache<double> cache;
        fwd(&cache);
        const auto gx = batchnorm_backward(r, cache, p);
        auto loss = [&] { return dot(fwd(nullptr), r); };
        note(gradcheck::check(x.values(), gx.values(), loss, {}, step));
        note(gradcheck::check(p.gamma.values(), copy(p.gamma.grad()), loss, {}, step));
        note(gradcheck::check(p.beta.values(), copy(p.beta.grad()), loss, {}, step));
    }
    {
        auto x = random_tensor<double>({2, 2, 4, 4}, 9);
        for (auto& v : x.values()) v += v > 0 ? 0.01 : -0.01;
        const auto r = random_tensor<double>(x.shape(), 10);
        note(gradcheck::check(x.values(), relu_backward(x, r).values(), [&] { return dot(relu(x), r); }, {}, step));
    }
    {
        auto x = random_tensor<double>({2, 2, 4, 4}, 11);
        const auto r = random_tensor<double>({2, 2, 2, 2}, 12);
        PoolIndices idx;
        maxpool2(x, &idx);
        note(gradcheck::check(x.values(), maxpool2_backward(r, idx).values(),
                              [&] { return dot(maxpool2(x), r); }, {}, step));
    }
    {
        auto x = random_tensor<double>({1, 2, 4, 4}, 13);
        const auto y = random_tensor<double>(x.shape(), 14);
        const auto r = random_tensor<double>(x.shape(), 15);
        note(gradcheck::check(x.values(), add_backward(r).first.values(), [&] { return dot(add(x, y), r); }, {}, step));
    }
    {
        auto pred = random_tensor<double>({2, 1, 4, 4}, 16);
        const auto target = random_tensor<double>(pred.shape(), 17);
        note(gradcheck::check(pred.values(), euclidean_loss(pred, target).grad.values(),
                              [&] { return euclidean_loss(pred, target).loss; }, {}, step));
    }
    return res;
}

Outcome gradient_correctness() {
    const PrimitiveResult prim = primitive_gradients(gradcheck::kStep);
    // Diagnostic only: a truncation-limited mismatch shrinks ~100x at a 10x smaller step.
    const PrimitiveResult fine = primitive_gradients(1e-4);

    Model<double> model = Model<double>::build({Arch::dr_resnet, 16, 3}, 11);
    const auto input = random_tensor<double>({1, 3, 8, 8}, 12);
    const auto weights = random_tensor<double>({1, 1, 2, 2}, 13);
    auto loss = [&] { return dot(model.forward(input, Mode::eval), weights); };
    loss();
    model.backward(weights);
    double worst = 0.0;
    std::size_t checked = 0, skipped = 0;
    for (auto& l : model.parameters().learnables()) {
        const auto r = gradcheck::check(l.tensor->values(), copy(l.tensor->grad()), loss,
                                        [&] { return model.branch_signature(); });
        worst = std::max(worst, r.max_error);
        checked += r.checked;
        skipped += r.skipped;
    }
    const double skipped_fraction = static_cast<double>(skipped) / static_cast<double>(checked + skipped);
    const bool ok = prim.worst < 1e-4 && worst < 1e-4 && skipped_fraction < 0.1;
    return {ok, "primitives max rel err " + fmt(prim.worst, 3) + " (worst entry has analytic gradient " +
                    fmt(prim.worst_analytic, 3) + "; " + fmt(fine.worst, 3) + " at step 1e-4); full dr_resnet 1x3x8x8 max rel err " +
                    fmt(worst, 3) + " over " + std::to_string(checked) + " parameters (" +
                    std::to_string(skipped) + " stencils straddling a ReLU/pool kink skipped)"};
}

// ------------------------------------------------------------ criterion 5

Outcome count_conservation() {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> heads(0, 64);
    std::uniform_int_distribution<std::size_t> side(4, 24);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t w = 4 * side(rng), h = 4 * side(rng);
        std::uniform_real_distribution<double> ux(0.0, static_cast<double>(w));
        std::uniform_real_distribution<double> uy(0.0, static_cast<double>(h));
        PointSet ps{{}, w, h};
        const std::size_t n = heads(rng);
        for (std::size_t i = 0; i < n; ++i) {
            ps.points.push_back({std::min(ux(rng), std::nextafter(static_cast<double>(w), 0.0)),
                                 std::min(uy(rng), std::nextafter(static_cast<double>(h), 0.0))});
        }
        KernelSpec fixed;
        KernelSpec adaptive;
        adaptive.mode = KernelMode::adaptive;
        for (const KernelSpec& spec : {fixed, adaptive}) {
            const DensityMap m = generate_density(ps, spec);
            const DensityMap q = downsample_sum(m, 4);
            const double tol = 1e-6 * std::max<double>(static_cast<double>(n), 1.0);
            for (const DensityMap* d : {&m, &q}) {
                double s = 0.0;
                for (float v : d->grid) s += v;
                worst = std::max(worst, std::abs(s - static_cast<double>(n)) / tol);
            }
        }
    }
    return {worst <= 1.0, "worst |sum-N| is " + fmt(worst, 3) + " of the 1e-6*max(N,1) budget"};
}

// ------------------------------------------------------------ criterion 6

Outcome metrics_check() {
    const std::vector<std::pair<double, double>> ex = {{3, 4}, {5, 7}};
    const MetricsReport r = metrics(ex);
    const bool example = std::abs(r.mae - 1.5) <= 1e-4 && std::abs(r.mse - 1.5811) <= 1e-4;
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 500.0);
    std::uniform_int_distribution<std::size_t> n(1, 40);
    std::size_t violations = 0;
    for (int t = 0; t < 1000; ++t) {
        std::vector<std::pair<double, double>> pairs(n(rng));
        for (auto& p : pairs) p = {std::floor(u(rng)), u(rng)};
        const MetricsReport m = metrics(pairs);
        if (!(m.mae <= m.mse)) ++violations;
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "MAE %.4f MSE %.4f; MAE<=MSE violations %zu/1000", r.mae, r.mse,
                  violations);
    return {example && violations == 0, buf};
}

// ------------------------------------------------------------ criterion 7

struct TrainRun {
    std::vector<double> losses;
    std::string failure;
    double mae = -1.0;
};

TrainRun overfit_run(const Dataset& data) {
    TrainRun run;
    TrainConfig cfg;  // lr 0.01, momentum 0.9, wd 0.0005, batch 4, crop 64, 300 iterations
    auto model = Model<float>::build({Arch::dr_resnet, 16, 3}, cfg.seed);
    TrainHooks hooks;
    hooks.on_iteration = [&](std::size_t, double loss) { run.losses.push_back(loss); };
    try {
        train(model, data, cfg, KernelSpec{}, hooks);
        run.mae = evaluate(model, data).mae;
    } catch (const DivergenceError& e) {
        run.failure = e.what();
    }
    return run;
}

Outcome overfit() {
    parallel::SerialScope deterministic;
    SynthConfig sc;  // 8 train images, 64x64, seeded
    const auto images = synth_images(sc);
    Dataset train_set;
    for (std::size_t i = 0; i < sc.train_count; ++i) train_set.push_back(to_sample(images[i]));

    const auto t0 = std::chrono::steady_clock::now();
    const TrainRun a = overfit_run(train_set);
    const TrainRun b = overfit_run(train_set);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    bool identical = a.losses.size() == b.losses.size() && a.failure == b.failure;
    for (std::size_t i = 0; identical && i < a.losses.size(); ++i) {
        identical = std::memcmp(&a.losses[i], &b.losses[i], sizeof(double)) == 0;
    }
    std::string detail = "loss traces " + std::string(identical ? "bit-identical" : "DIFFER") + " over " +
                         std::to_string(a.losses.size()) + " iterations; ";
    if (!a.failure.empty()) {
        detail += a.failure + " (first losses";
        for (std::size_t i = 0; i < std::min<std::size_t>(a.losses.size(), 3); ++i) detail += " " + fmt(a.losses[i], 4);
        detail += ")";
    } else {
        detail += "training-set MAE " + fmt(a.mae, 4);
    }
    detail += "; " + fmt(seconds, 3) + " s for both runs";
    const bool ok = identical && a.failure.empty() && a.mae >= 0.0 && a.mae < 0.5 && seconds < 300.0;
    return {ok, detail};
}

// ------------------------------------------------------------ criterion 8

Outcome five_fold() {
    std::vector<std::string> ids;
    for (int i = 0; i < 50; ++i) ids.push_back("img_" + std::to_string(i));
    std::set<std::string> all;
    bool sizes = true, disjoint = true, stable = true, complement = true;
    for (std::size_t f = 0; f < 5; ++f) {
        const FoldSplit s = kfold(ids, 5, f, 2018);
        sizes = sizes && s.test.size() == 10;
        for (const auto& id : s.test) disjoint = all.insert(id).second && disjoint;
        const FoldSplit again = kfold(ids, 5, f, 2018);
        stable = stable && again.test == s.test && again.train == s.train;
        std::set<std::string> both(s.train.begin(), s.train.end());
        both.insert(s.test.begin(), s.test.end());
        complement = complement && both.size() == 50 && s.train.size() == 40;
    }
    const bool ok = sizes && disjoint && stable && complement && all.size() == 50;
    return {ok, std::string("test folds of 10: ") + (sizes ? "yes" : "no") + ", disjoint: " +
                    (disjoint ? "yes" : "no") + ", union covers " + std::to_string(all.size()) +
                    "/50, stable under seed: " + (stable ? "yes" : "no")};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"parameter ladder", parameter_ladder},
        {"depth law", depth_law},
        {"tied-unroll equivalence", tied_unroll},
        {"gradient correctness", gradient_correctness},
        {"count conservation", count_conservation},
        {"count metrics", metrics_check},
        {"overfit smoke test", overfit},
        {"5-fold harness", five_fold},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
