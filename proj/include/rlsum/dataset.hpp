#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlsum/errors.hpp"
#include "rlsum/matrix.hpp"
#include "rlsum/params.hpp"
#include "rlsum/rng.hpp"

namespace rlsum {

// Contiguous frame range [begin, end).
struct Shot {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::uint32_t length() const { return end - begin; }
};

constexpr int kNoLabel = -1;

struct VideoRecord {
    std::string id;
    std::string features_path;  // as written in the manifest
    Matrix features;            // T x D
    int label = kNoLabel;
    std::vector<Shot> shots;
    std::vector<std::vector<std::uint32_t>> human_summaries;

    std::uint32_t frames() const { return static_cast<std::uint32_t>(features.rows); }
    bool has_label() const { return label != kNoLabel; }
};

struct Dataset {
    std::vector<std::string> categories;
    std::vector<VideoRecord> videos;

    std::size_t num_categories() const { return categories.size(); }
};

struct ValidationIssue {
    std::string video_id;
    std::string field;
    std::string message;
    bool warning = false;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;

    void error(const std::string& id, const std::string& field, const std::string& msg) {
        issues.push_back({id, field, msg, false});
    }
    void warn(const std::string& id, const std::string& field, const std::string& msg) {
        issues.push_back({id, field, msg, true});
    }
    bool ok() const {
        return std::none_of(issues.begin(), issues.end(),
                            [](const ValidationIssue& i) { return !i.warning; });
    }
    std::string to_string() const {
        std::string out;
        for (const auto& i : issues) {
            out += (i.warning ? "warning" : "error");
            if (!i.video_id.empty()) out += " [" + i.video_id + "/" + i.field + "]";
            out += ": " + i.message + "\n";
        }
        return out;
    }
};

// Divides each nonzero row by its L2 norm; zero rows pass through.
// Returns the number of zero rows so callers can warn about them.
inline std::size_t l2_normalise(Matrix& features) {
    std::size_t zero_rows = 0;
    for (std::size_t r = 0; r < features.rows; ++r) {
        double* row = features.row(r);
        double sq = 0.0;
        for (std::size_t c = 0; c < features.cols; ++c) sq += row[c] * row[c];
        if (sq == 0.0) {
            ++zero_rows;
            continue;
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t c = 0; c < features.cols; ++c) row[c] *= inv;
    }
    return zero_rows;
}

inline void l2_normalise_dataset(Dataset& ds, ValidationReport* report = nullptr) {
    for (auto& v : ds.videos) {
        const std::size_t zeros = l2_normalise(v.features);
        if (zeros > 0 && report)
            report->warn(v.id, "features", std::to_string(zeros) + " zero rows left unnormalised");
    }
}

// Feature file: magic "RLSF", u32 version, u64 T, u64 D, then T*D row-major
// f32 little-endian values (promoted to f64 in memory).
inline constexpr std::uint32_t kFeatureFormatVersion = 1;

inline void save_feature_file(const std::string& path, const Matrix& features) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("RLSF", 4);
    detail::write_u32(os, kFeatureFormatVersion);
    detail::write_u64(os, features.rows);
    detail::write_u64(os, features.cols);
    for (double v : features.data) detail::write_f32(os, static_cast<float>(v));
    if (!os) throw IoError("write failed: " + path);
}

inline Matrix load_feature_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    detail::read_bytes(is, magic, 4, "magic");
    if (std::string(magic, 4) != "RLSF") throw IoError("not a feature file: " + path);
    const std::uint32_t version = detail::read_u32(is, "version");
    if (version != kFeatureFormatVersion)
        throw IoError("unsupported feature file version " + std::to_string(version));
    const std::uint64_t t = detail::read_u64(is, "frame count");
    const std::uint64_t d = detail::read_u64(is, "feature dim");
    Matrix m(t, d);
    for (double& v : m.data) v = static_cast<double>(detail::read_f32(is, "features"));
    return m;
}

// Uniform fallback segmentation used when a manifest omits shot boundaries.
inline std::vector<Shot> uniform_shots(std::uint32_t frames, std::uint32_t shot_len) {
    if (shot_len == 0) throw ConfigError("uniform_shots: shot length must be positive");
    std::vector<Shot> shots;
    for (std::uint32_t s = 0; s < frames; s += shot_len)
        shots.push_back({s, std::min(frames, s + shot_len)});
    return shots;
}

namespace detail {

inline void validate_video(const VideoRecord& v, std::size_t num_categories, ValidationReport& report) {
    const std::uint32_t T = v.frames();
    if (T == 0) report.error(v.id, "features", "empty feature sequence");
    if (!all_finite(v.features)) report.error(v.id, "features", "non-finite feature values");
    if (v.label != kNoLabel && (v.label < 0 || static_cast<std::size_t>(v.label) >= num_categories))
        report.error(v.id, "label", "label " + std::to_string(v.label) + " out of range for " +
                                        std::to_string(num_categories) + " categories");
    // shots must partition [0, T) without gaps or overlap
    std::uint32_t cursor = 0;
    bool shots_ok = true;
    for (const auto& s : v.shots) {
        if (s.begin != cursor || s.end <= s.begin) {
            shots_ok = false;
            break;
        }
        cursor = s.end;
    }
    if (!shots_ok || cursor != T)
        report.error(v.id, "shots", "shot list does not partition the frame range without gaps or overlap");
    for (const auto& hs : v.human_summaries)
        for (std::uint32_t f : hs)
            if (f >= T) {
                report.error(v.id, "human_summaries", "frame index " + std::to_string(f) + " out of range");
                break;
            }
}

}  // namespace detail

inline void validate_dataset(const Dataset& ds, ValidationReport& report) {
    std::map<std::string, int> seen;
    for (const auto& v : ds.videos) {
        if (++seen[v.id] == 2) report.error(v.id, "id", "duplicate video id");
        detail::validate_video(v, ds.num_categories(), report);
    }
}

struct LoadedDataset {
    Dataset dataset;
    ValidationReport report;
};

// Reads a manifest and its feature files. Structural problems (unreadable
// JSON, wrong types) throw; invariant violations are collected in the report.
inline LoadedDataset load_manifest(const std::string& path, std::uint32_t default_shot_len = 8) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest parse error in " + path + ": " + e.what());
    }

    LoadedDataset out;
    const auto dir = std::filesystem::path(path).parent_path();
    try {
        out.dataset.categories = j.at("categories").get<std::vector<std::string>>();
        for (const auto& jv : j.at("videos")) {
            VideoRecord v;
            v.id = jv.at("id").get<std::string>();
            v.features_path = jv.at("features_path").get<std::string>();
            if (jv.contains("label")) v.label = jv.at("label").get<int>();
            std::filesystem::path fp(v.features_path);
            if (fp.is_relative()) fp = dir / fp;
            try {
                v.features = load_feature_file(fp.string());
            } catch (const IoError& e) {
                out.report.error(v.id, "features_path", e.what());
            }
            if (jv.contains("shots")) {
                for (const auto& js : jv.at("shots")) {
                    if (!js.is_array() || js.size() != 2)
                        throw IoError("manifest: shot entries must be [start, end) pairs");
                    v.shots.push_back({js[0].get<std::uint32_t>(), js[1].get<std::uint32_t>()});
                }
            } else {
                v.shots = uniform_shots(v.frames(), default_shot_len);
            }
            if (jv.contains("human_summaries"))
                for (const auto& jh : jv.at("human_summaries")) {
                    auto frames = jh.get<std::vector<std::uint32_t>>();
                    std::sort(frames.begin(), frames.end());
                    v.human_summaries.push_back(std::move(frames));
                }
            out.dataset.videos.push_back(std::move(v));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest structure error in " + path + ": " + e.what());
    }
    validate_dataset(out.dataset, out.report);
    return out;
}

// Loader for pipeline commands: any validation error aborts.
inline Dataset load_manifest_checked(const std::string& path, std::uint32_t default_shot_len = 8) {
    LoadedDataset loaded = load_manifest(path, default_shot_len);
    if (!loaded.report.ok())
        throw ValidationError("manifest validation failed:\n" + loaded.report.to_string());
    return std::move(loaded.dataset);
}

// Writes feature files under <dir>/features/ and a manifest.json next to
// them. Returns the manifest path.
inline std::string save_dataset(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "features");
    nlohmann::json j;
    j["categories"] = ds.categories;
    j["videos"] = nlohmann::json::array();
    for (const auto& v : ds.videos) {
        const std::string rel = "features/" + v.id + ".rlsf";
        save_feature_file((fs::path(dir) / rel).string(), v.features);
        nlohmann::json jv;
        jv["id"] = v.id;
        jv["features_path"] = rel;
        if (v.has_label()) jv["label"] = v.label;
        nlohmann::json shots = nlohmann::json::array();
        for (const auto& s : v.shots) shots.push_back({s.begin, s.end});
        jv["shots"] = shots;
        jv["human_summaries"] = v.human_summaries;
        j["videos"].push_back(std::move(jv));
    }
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ofstream os(manifest_path, std::ios::trunc);
    if (!os) throw IoError("cannot write manifest: " + manifest_path);
    os << j.dump(2) << "\n";
    return manifest_path;
}

struct FoldSplit {
    std::vector<std::uint32_t> train;
    std::vector<std::uint32_t> test;
};

// Deterministic k-fold split, stratified by category: videos of each label
// are shuffled and dealt round-robin across folds.
inline std::vector<FoldSplit> make_folds(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("make_folds: k must be at least 2");
    if (ds.videos.size() < k)
        throw ConfigError("make_folds: k = " + std::to_string(k) + " exceeds video count " +
                          std::to_string(ds.videos.size()));

    std::map<int, std::vector<std::uint32_t>> by_label;
    for (std::uint32_t i = 0; i < ds.videos.size(); ++i) by_label[ds.videos[i].label].push_back(i);

    Rng rng = Rng(seed).fork("folds");
    std::vector<std::vector<std::uint32_t>> fold_test(k);
    std::size_t next_fold = 0;
    for (auto& [label, indices] : by_label) {
        rng.shuffle(indices);
        for (std::uint32_t idx : indices) {
            fold_test[next_fold].push_back(idx);
            next_fold = (next_fold + 1) % k;
        }
    }

    std::vector<FoldSplit> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        folds[f].test = fold_test[f];
        std::sort(folds[f].test.begin(), folds[f].test.end());
        for (std::size_t g = 0; g < k; ++g)
            if (g != f)
                folds[f].train.insert(folds[f].train.end(), fold_test[g].begin(), fold_test[g].end());
        std::sort(folds[f].train.begin(), folds[f].train.end());
    }
    return folds;
}

// Stratified train/held-out split: per category, ceil(fraction * n) videos
// go to the held-out side. fraction 0 keeps everything in training.
inline FoldSplit split_holdout(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw ConfigError("split_holdout: fraction must be in [0,1)");
    FoldSplit split;
    std::map<int, std::vector<std::uint32_t>> by_label;
    for (std::uint32_t i = 0; i < ds.videos.size(); ++i) by_label[ds.videos[i].label].push_back(i);
    Rng rng = Rng(seed).fork("holdout");
    for (auto& [label, indices] : by_label) {
        rng.shuffle(indices);
        const std::size_t held =
            fraction > 0.0
                ? std::min(indices.size() - 1,
                           static_cast<std::size_t>(std::ceil(fraction * indices.size() - 1e-9)))
                : 0;
        for (std::size_t i = 0; i < indices.size(); ++i)
            (i < held ? split.test : split.train).push_back(indices[i]);
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    if (split.train.empty()) throw ConfigError("split_holdout: no training videos left");
    return split;
}

struct SyntheticConfig {
    std::size_t classes = 5;
    std::size_t per_class = 20;
    std::size_t frames = 60;
    std::size_t dim = 16;
    double signal_fraction = 0.4;
    double noise_level = 0.2;
    std::size_t shot_len = 8;
    std::size_t distractor_pool = 8;
    std::uint64_t seed = 0;
};

// Category-structured synthetic sequences. Each category has a unit
// prototype direction; signal frames are noisy copies of it, the remaining
// frames are noisy copies of pool distractors shared by all categories, so
// only signal frames carry label information. The signal-frame mask is
// stored as a human summary. Output values are quantized to f32 so the
// on-disk round trip is bit-exact.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.classes < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
    if (cfg.dim < cfg.classes) throw ConfigError("generate_synthetic: dim must be >= classes");
    if (cfg.signal_fraction <= 0.0 || cfg.signal_fraction >= 1.0)
        throw ConfigError("generate_synthetic: signal_fraction must be in (0,1)");
    if (cfg.frames == 0 || cfg.per_class == 0)
        throw ConfigError("generate_synthetic: frames and per_class must be positive");
    if (cfg.distractor_pool == 0) throw ConfigError("generate_synthetic: empty distractor pool");

    Rng master(cfg.seed);

    // Prototypes are standard basis directions; distractors are random unit
    // vectors drawn once and shared by every category.
    Rng pool_rng = master.fork("distractors");
    std::vector<std::vector<double>> pool(cfg.distractor_pool, std::vector<double>(cfg.dim));
    for (auto& d : pool) {
        double sq = 0.0;
        for (double& v : d) {
            v = pool_rng.normal();
            sq += v * v;
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : d) v *= inv;
    }

    Dataset ds;
    for (std::size_t c = 0; c < cfg.classes; ++c) ds.categories.push_back("cat" + std::to_string(c));

    const std::uint32_t T = static_cast<std::uint32_t>(cfg.frames);
    const auto shots = uniform_shots(T, static_cast<std::uint32_t>(cfg.shot_len));
    const std::uint32_t n_signal =
        std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::llround(cfg.signal_fraction * T)));

    for (std::size_t c = 0; c < cfg.classes; ++c) {
        for (std::size_t i = 0; i < cfg.per_class; ++i) {
            VideoRecord v;
            v.id = "cat" + std::to_string(c) + "_v" + std::to_string(i);
            v.label = static_cast<int>(c);
            v.shots = shots;
            Rng rng = master.fork(v.id);

            // signal placement: whole shots, shuffled, first n_signal frames
            std::vector<std::uint32_t> shot_order(shots.size());
            for (std::uint32_t s = 0; s < shots.size(); ++s) shot_order[s] = s;
            rng.shuffle(shot_order);
            std::vector<bool> is_signal(T, false);
            std::uint32_t placed = 0;
            for (std::uint32_t s : shot_order) {
                if (placed >= n_signal) break;
                for (std::uint32_t f = shots[s].begin; f < shots[s].end && placed < n_signal; ++f) {
                    is_signal[f] = true;
                    ++placed;
                }
            }

            v.features = Matrix(T, cfg.dim);
            for (std::uint32_t f = 0; f < T; ++f) {
                double* row = v.features.row(f);
                if (is_signal[f]) {
                    row[c] = 1.0;
                } else {
                    const auto& d = pool[rng.uniform_index(pool.size())];
                    std::copy(d.begin(), d.end(), row);
                }
                if (cfg.noise_level > 0.0)
                    for (std::size_t k = 0; k < cfg.dim; ++k) row[k] += cfg.noise_level * rng.normal();
            }
            // quantize to the on-disk precision
            for (double& x : v.features.data) x = static_cast<double>(static_cast<float>(x));

            std::vector<std::uint32_t> mask;
            for (std::uint32_t f = 0; f < T; ++f)
                if (is_signal[f]) mask.push_back(f);
            v.human_summaries.push_back(std::move(mask));
            ds.videos.push_back(std::move(v));
        }
    }
    return ds;
}

}  // namespace rlsum
