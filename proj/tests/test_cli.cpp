#include "catch_amalgamated.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "support.hpp"

namespace {

struct CommandResult {
    int exit_code = -1;
    std::string output;  // stdout only
};

CommandResult run_cli(const std::string& args) {
    const std::string cmd = std::string(RLSUM_CLI_PATH) + " " + args + " 2>/dev/null";
    std::array<char, 4096> buf{};
    CommandResult result;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (std::fgets(buf.data(), buf.size(), pipe)) result.output += buf.data();
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

const std::string kGenFlags =
    "--classes 3 --per-class 4 --frames 24 --dim 8 --shot-len 6 --seed 11";

}  // namespace

TEST_CASE("gen-synthetic writes a loadable dataset and prints the manifest path") {
    testsupport::TempDir tmp("cli_gen");
    const auto r = run_cli("gen-synthetic --out " + tmp.path("data") + " " + kGenFlags);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("manifest.json") != std::string::npos);

    const auto j = nlohmann::json::parse(slurp(tmp.path("data") + "/manifest.json"));
    CHECK(j.at("videos").size() == 12);
    CHECK(j.at("categories").size() == 3);
    CHECK(std::filesystem::exists(tmp.path("data") + "/effective_config.json"));
}

TEST_CASE("gen-synthetic is byte-identical across runs with the same flags") {
    testsupport::TempDir tmp("cli_det");
    REQUIRE(run_cli("gen-synthetic --out " + tmp.path("a") + " " + kGenFlags).exit_code == 0);
    REQUIRE(run_cli("gen-synthetic --out " + tmp.path("b") + " " + kGenFlags).exit_code == 0);
    CHECK(slurp(tmp.path("a") + "/manifest.json") == slurp(tmp.path("b") + "/manifest.json"));
    CHECK(slurp(tmp.path("a") + "/features/cat0_v0.rlsf") ==
          slurp(tmp.path("b") + "/features/cat0_v0.rlsf"));
    CHECK(slurp(tmp.path("a") + "/features/cat2_v3.rlsf") ==
          slurp(tmp.path("b") + "/features/cat2_v3.rlsf"));
}

TEST_CASE("usage errors exit with code 2") {
    testsupport::TempDir tmp("cli_usage");
    CHECK(run_cli("gen-synthetic --out " + tmp.path("x") + " --classes 3 --dim 0").exit_code == 2);
    CHECK(run_cli("train-classifier --manifest /nonexistent/manifest.json --out " + tmp.path("y"))
              .exit_code == 2);
    CHECK(run_cli("definitely-not-a-subcommand").exit_code == 2);
    CHECK(run_cli("gen-synthetic --out " + tmp.path("z") + " --no-such-flag 3").exit_code == 2);
    CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("config file values are overridden by explicit flags and unknown keys rejected") {
    testsupport::TempDir tmp("cli_cfg");
    {
        std::ofstream os(tmp.path("config.json"));
        os << R"({"classes": 2, "per_class": 3, "frames": 12, "dim": 6, "shot_len": 4, "seed": 5})";
    }
    const auto r = run_cli("gen-synthetic --out " + tmp.path("data") + " --config " +
                           tmp.path("config.json") + " --classes 4");
    REQUIRE(r.exit_code == 0);
    const auto manifest = nlohmann::json::parse(slurp(tmp.path("data") + "/manifest.json"));
    CHECK(manifest.at("categories").size() == 4);  // flag beat the file
    CHECK(manifest.at("videos").size() == 12);     // per_class 3 came from the file

    const auto echoed = nlohmann::json::parse(slurp(tmp.path("data") + "/effective_config.json"));
    CHECK(echoed.at("classes") == 4);
    CHECK(echoed.at("per_class") == 3);

    {
        std::ofstream os(tmp.path("bad.json"));
        os << R"({"clesses": 2})";
    }
    CHECK(run_cli("gen-synthetic --out " + tmp.path("d2") + " --config " + tmp.path("bad.json"))
              .exit_code == 2);
}

TEST_CASE("full pipeline: classifier, dqsn, summaries, evaluation") {
    testsupport::TempDir tmp("cli_pipe");
    REQUIRE(run_cli("gen-synthetic --out " + tmp.path("data") + " " + kGenFlags).exit_code == 0);
    const std::string manifest = tmp.path("data") + "/manifest.json";

    SECTION("train-classifier prints accuracies; omega 0 also runs") {
        const auto r = run_cli("train-classifier --manifest " + manifest + " --out " + tmp.path("cls") +
                               " --embedding 8 --hidden 6 --cls-epochs 8 --cls-learning-rate 3e-3"
                               " --seed 3");
        REQUIRE(r.exit_code == 0);
        CHECK(r.output.find("train_accuracy") != std::string::npos);
        CHECK(r.output.find("heldout_accuracy") != std::string::npos);
        CHECK(std::filesystem::exists(tmp.path("cls") + "/classifier.rlsn.json"));

        const auto r0 = run_cli("train-classifier --manifest " + manifest + " --out " +
                                tmp.path("cls0") +
                                " --embedding 6 --hidden 4 --cls-epochs 2 --omega 0 --seed 3");
        CHECK(r0.exit_code == 0);
    }

    SECTION("train-dqsn needs a classifier for recognisability rewards") {
        CHECK(run_cli("train-dqsn --manifest " + manifest + " --out " + tmp.path("dq_bad") +
                      " --rewards g --episodes 1 --minibatch 4 --embedding 6 --hidden 4")
                  .exit_code == 2);
        // unsupervised-only runs without one
        const auto r = run_cli("train-dqsn --manifest " + manifest + " --out " + tmp.path("dq_u") +
                               " --rewards u --episodes 2 --minibatch 6 --embedding 6 --hidden 4"
                               " --min-keep-fraction 0.25 --seed 3");
        REQUIRE(r.exit_code == 0);
        CHECK(std::filesystem::exists(tmp.path("dq_u") + "/qnet.rlsn"));
        CHECK(std::filesystem::exists(tmp.path("dq_u") + "/training_log.jsonl"));
    }

    SECTION("summarize at full budget selects every shot and ignores labels") {
        REQUIRE(run_cli("train-dqsn --manifest " + manifest + " --out " + tmp.path("dq") +
                        " --rewards u --episodes 2 --minibatch 6 --embedding 6 --hidden 4"
                        " --min-keep-fraction 0.25 --seed 3")
                    .exit_code == 0);
        const std::string qnet = tmp.path("dq") + "/qnet.rlsn";

        REQUIRE(run_cli("summarize --manifest " + manifest + " --out " + tmp.path("s1") + " --qnet " +
                        qnet + " --budget 1.0")
                    .exit_code == 0);
        const auto s = nlohmann::json::parse(slurp(tmp.path("s1") + "/cat0_v0.json"));
        CHECK(s.at("selected_frames").size() == 24);  // whole video at budget 1.0
        CHECK(s.at("frame_scores").size() == 24);

        // label-free manifest: drop the label fields
        auto j = nlohmann::json::parse(slurp(manifest));
        for (auto& v : j["videos"]) v.erase("label");
        {
            std::ofstream os(tmp.path("data") + "/nolabel.json");
            os << j.dump();
        }
        REQUIRE(run_cli("summarize --manifest " + tmp.path("data") + "/nolabel.json --out " +
                        tmp.path("s2") + " --qnet " + qnet + " --budget 1.0")
                    .exit_code == 0);
        CHECK(slurp(tmp.path("s2") + "/cat0_v0.json") == slurp(tmp.path("s1") + "/cat0_v0.json"));

        // summaries are deterministic across invocations
        REQUIRE(run_cli("summarize --manifest " + manifest + " --out " + tmp.path("s3") + " --qnet " +
                        qnet + " --budget 1.0")
                    .exit_code == 0);
        CHECK(slurp(tmp.path("s3") + "/cat1_v2.json") == slurp(tmp.path("s1") + "/cat1_v2.json"));
    }

    SECTION("evaluate writes report files with one-decimal percentages") {
        REQUIRE(run_cli("train-dqsn --manifest " + manifest + " --out " + tmp.path("dq2") +
                        " --rewards u --episodes 2 --minibatch 6 --embedding 6 --hidden 4"
                        " --min-keep-fraction 0.25 --seed 4")
                    .exit_code == 0);
        const std::string qnet = tmp.path("dq2") + "/qnet.rlsn";
        const auto r = run_cli("evaluate --manifest " + manifest + " --out " + tmp.path("ev") +
                               " --qnet " + qnet + " --no-cv --budget 0.5");
        REQUIRE(r.exit_code == 0);
        CHECK(std::filesystem::exists(tmp.path("ev") + "/report.json"));
        CHECK(std::filesystem::exists(tmp.path("ev") + "/report.txt"));
        const auto report = nlohmann::json::parse(slurp(tmp.path("ev") + "/report.json"));
        CHECK(report.at("videos").size() == 12);
        // table formats percentages like 39.4
        const std::string table = slurp(tmp.path("ev") + "/report.txt");
        CHECK(table.find('.') != std::string::npos);
        CHECK(table.find("all") != std::string::npos);

        // wrong checkpoint count for cross-validated evaluation
        CHECK(run_cli("evaluate --manifest " + manifest + " --out " + tmp.path("ev2") + " --qnet " +
                      qnet + " --folds 2 --budget 0.5")
                  .exit_code == 2);
    }

    SECTION("inspect prints checkpoint metadata") {
        REQUIRE(run_cli("train-dqsn --manifest " + manifest + " --out " + tmp.path("dq3") +
                        " --rewards u --episodes 1 --minibatch 6 --embedding 6 --hidden 4"
                        " --min-keep-fraction 0.25 --seed 5")
                    .exit_code == 0);
        const auto r = run_cli("inspect " + tmp.path("dq3") + "/qnet.rlsn");
        REQUIRE(r.exit_code == 0);
        CHECK(r.output.find("parameter container") != std::string::npos);
        CHECK(r.output.find("embed.W") != std::string::npos);

        const auto rf = run_cli("inspect " + tmp.path("data") + "/features/cat0_v0.rlsf");
        REQUIRE(rf.exit_code == 0);
        CHECK(rf.output.find("24 frames x 8 dims") != std::string::npos);
    }
}

TEST_CASE("feature-dimension mismatch between checkpoint and manifest is a config error") {
    testsupport::TempDir tmp("cli_dim");
    REQUIRE(run_cli("gen-synthetic --out " + tmp.path("d8") + " " + kGenFlags).exit_code == 0);
    REQUIRE(run_cli("gen-synthetic --out " + tmp.path("d6") +
                    " --classes 3 --per-class 2 --frames 12 --dim 6 --shot-len 4 --seed 2")
                .exit_code == 0);
    REQUIRE(run_cli("train-dqsn --manifest " + tmp.path("d8") + "/manifest.json --out " +
                    tmp.path("dq") + " --rewards u --episodes 1 --minibatch 4 --embedding 6"
                    " --hidden 4 --min-keep-fraction 0.25")
                .exit_code == 0);
    CHECK(run_cli("summarize --manifest " + tmp.path("d6") + "/manifest.json --out " + tmp.path("s") +
                  " --qnet " + tmp.path("dq") + "/qnet.rlsn --budget 0.5")
              .exit_code == 2);
}
