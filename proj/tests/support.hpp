#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rlsum/matrix.hpp"
#include "rlsum/params.hpp"

namespace testsupport {

// Central finite differences over every element of every parameter,
// compared against the analytic gradients already accumulated in `ps`.
// Returns the worst element error |analytic - numeric| / max(1, |a|, |n|).
inline double max_grad_error(rlsum::ParameterSet& ps, const std::function<double()>& loss,
                             double h = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& entry = ps.entry(i);
        for (std::size_t j = 0; j < entry.value.data.size(); ++j) {
            const double backup = entry.value.data[j];
            entry.value.data[j] = backup + h;
            const double lp = loss();
            entry.value.data[j] = backup - h;
            const double lm = loss();
            entry.value.data[j] = backup;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = entry.grad.data[j];
            const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    }
    return worst;
}

// Independent evaluator of the diversity-representativeness reward, written
// directly from the definition with explicit cosine normalisation.
inline double dr_oracle(const rlsum::Matrix& x, const std::vector<std::uint32_t>& kept) {
    double diversity = 0.0;
    if (kept.size() > 1) {
        double pair_sum = 0.0;
        for (std::uint32_t a : kept) {
            for (std::uint32_t b : kept) {
                if (a == b) continue;
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (std::size_t d = 0; d < x.cols; ++d) {
                    dot += x(a, d) * x(b, d);
                    na += x(a, d) * x(a, d);
                    nb += x(b, d) * x(b, d);
                }
                pair_sum += 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
            }
        }
        diversity = pair_sum / (double(kept.size()) * double(kept.size() - 1));
    }
    double total_dist = 0.0;
    for (std::size_t t = 0; t < x.rows; ++t) {
        double best = 1e300;
        for (std::uint32_t k : kept) {
            double sq = 0.0;
            for (std::size_t d = 0; d < x.cols; ++d) sq += (x(t, d) - x(k, d)) * (x(t, d) - x(k, d));
            if (std::sqrt(sq) < best) best = std::sqrt(sq);
        }
        total_dist += best;
    }
    return diversity + std::exp(-total_dist / double(x.rows));
}

// Exhaustive reference for the budgeted shot selection, accumulating subset
// values from the highest index down so ties compare bit-identically with
// the dynamic program. Budget is floor(budget_fraction * total length).
inline std::vector<std::uint32_t> knapsack_oracle(const std::vector<double>& scores,
                                                  const std::vector<std::uint32_t>& lengths,
                                                  double budget_fraction) {
    std::uint32_t total = 0;
    for (std::uint32_t l : lengths) total += l;
    const std::uint32_t budget =
        static_cast<std::uint32_t>(std::floor(budget_fraction * static_cast<double>(total) + 1e-9));
    const std::size_t n = scores.size();

    std::vector<std::uint32_t> best_set;
    double best_val = 0.0;
    bool have = false;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        std::uint32_t len = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) len += lengths[i];
        if (len > budget) continue;
        double val = 0.0;
        std::vector<std::uint32_t> set;
        for (std::size_t i = n; i-- > 0;)
            if (mask & (1u << i)) val = scores[i] * static_cast<double>(lengths[i]) + val;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) set.push_back(static_cast<std::uint32_t>(i));
        if (!have || val > best_val ||
            (val == best_val && std::lexicographical_compare(set.begin(), set.end(), best_set.begin(),
                                                             best_set.end()))) {
            best_val = val;
            best_set = set;
            have = true;
        }
    }
    return best_set;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        base_ = std::filesystem::temp_directory_path() /
                ("rlsum_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(base_);
        std::filesystem::create_directories(base_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(base_, ec);
    }
    std::string path(const std::string& name = "") const {
        return name.empty() ? base_.string() : (base_ / name).string();
    }

private:
    std::filesystem::path base_;
};

}  // namespace testsupport
