#include "crowd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "crowd/parallel.hpp"

namespace crowd {

double count_from_values(std::span<const float> values) {
    double s = 0.0;
    for (float v : values) s += v > 0.0f ? v : 0.0f;
    return s;
}

double count_from_map(const DensityMap& map) { return count_from_values(map.grid); }

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& r : per_image) {
        per.push_back({{"id", r.id}, {"truth", r.truth}, {"estimate", r.estimate}});
    }
    nlohmann::json skip = nlohmann::json::array();
    for (const auto& s : skipped) skip.push_back({{"id", s.id}, {"reason", s.reason}});
    return {{"n", n}, {"mae", mae}, {"mse", mse}, {"per_image", per}, {"skipped", skip}};
}

MetricsReport metrics(std::vector<ImageResult> results) {
    if (results.empty()) throw std::invalid_argument("metrics: no predictions to score");
    MetricsReport r;
    r.n = results.size();
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    for (const auto& x : results) {
        const double e = x.truth - x.estimate;
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    r.mae = abs_sum / static_cast<double>(r.n);
    r.mse = std::sqrt(sq_sum / static_cast<double>(r.n));
    r.per_image = std::move(results);
    return r;
}

MetricsReport metrics(std::span<const std::pair<double, double>> truth_estimate) {
    std::vector<ImageResult> results;
    results.reserve(truth_estimate.size());
    for (std::size_t i = 0; i < truth_estimate.size(); ++i) {
        results.push_back({std::to_string(i), truth_estimate[i].first, truth_estimate[i].second});
    }
    return metrics(std::move(results));
}

FoldSplit kfold(const std::vector<std::string>& ids, std::size_t k, std::size_t fold_index,
                std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("kfold: k must be at least 2");
    if (fold_index >= k) throw std::invalid_argument("kfold: fold index out of range");
    if (k > ids.size()) {
        throw std::invalid_argument("kfold: k = " + std::to_string(k) + " exceeds dataset size " +
                                    std::to_string(ids.size()));
    }
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Fisher-Yates with an explicit draw so the permutation is library-independent.
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    const std::size_t base = ids.size() / k;
    const std::size_t extra = ids.size() % k;
    const std::size_t begin = fold_index * base + std::min(fold_index, extra);
    const std::size_t end = begin + base + (fold_index < extra ? 1 : 0);
    FoldSplit split;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i >= begin && i < end ? split.test : split.train).push_back(ids[order[i]]);
    }
    return split;
}

CropResult crop_to_multiple(const Sample& sample, std::size_t multiple) {
    const Shape4& s = sample.image.shape();
    const std::size_t h = s.h / multiple * multiple;
    const std::size_t w = s.w / multiple * multiple;
    if (h == 0 || w == 0) {
        throw ShapeError("image " + sample.id + " is smaller than " + std::to_string(multiple) +
                         " pixels");
    }
    CropResult r;
    r.sample.id = sample.id;
    if (h == s.h && w == s.w) {
        r.sample.image = sample.image.reshaped(s);
        r.sample.points = sample.points;
        return r;
    }
    r.sample.image = Tensor4({s.n, s.c, h, w});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    r.sample.image.at(n, c, y, x) = sample.image.at(n, c, y, x);
    r.sample.points.width = w;
    r.sample.points.height = h;
    for (const Point& p : sample.points.points) {
        if (p.x < static_cast<double>(w) && p.y < static_cast<double>(h)) {
            r.sample.points.points.push_back(p);
        } else {
            ++r.dropped_points;
        }
    }
    return r;
}

MetricsReport evaluate(const Model<float>& model, const Dataset& dataset,
                       std::vector<SkippedEntry> skipped) {
    std::vector<ImageResult> results(dataset.size());
    std::vector<std::string> errors(dataset.size());

#pragma omp parallel for schedule(dynamic) if (parallel::enabled())
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(dataset.size()); ++i) {
        const Sample& s = dataset[static_cast<std::size_t>(i)];
        try {
            const CropResult cropped = crop_to_multiple(s, 4);
            const Tensor4 out = model.infer(cropped.sample.image);
            results[i] = {s.id, static_cast<double>(cropped.sample.points.count()),
                          count_from_values(out.values())};
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }

    std::vector<ImageResult> ok;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (errors[i].empty()) {
            ok.push_back(std::move(results[i]));
        } else {
            skipped.push_back({dataset[i].id, errors[i]});
        }
    }
    MetricsReport report = metrics(std::move(ok));
    report.skipped = std::move(skipped);
    return report;
}

}  // namespace crowd
