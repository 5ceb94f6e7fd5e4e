#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "excord/data_model.hpp"
#include "excord/metrics.hpp"
#include "excord/synthetic.hpp"
#include "json.hpp"
#include "test_helpers.hpp"

using namespace excord;
using nlohmann::json;
using testing::fixture;
using testing::scratch_dir;
using testing::slurp;
using testing::spit;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

Outcome excord_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "excord");
    args.insert(args.begin() + 1, {"--log-level", "off"});
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

std::size_t count_lines(const std::filesystem::path& path) {
    std::istringstream in(slurp(path));
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

}  // namespace

TEST_CASE("prepare on QuAC and CANARD fixtures matches a raw count of the inputs") {
    // Counted straight from the raw files, without the loaders.
    const json quac = json::parse(slurp(fixture("quac_small.json")));
    const json canard = json::parse(slurp(fixture("canard_small.json")));
    std::set<std::pair<std::string, int>> turns;
    std::size_t dialogues = 0;
    for (const auto& article : quac["data"]) {
        for (const auto& para : article["paragraphs"]) {
            ++dialogues;
            for (std::size_t i = 0; i < para["qas"].size(); ++i) turns.emplace(para["id"], static_cast<int>(i) + 1);
        }
    }
    std::size_t human = 0;
    for (const auto& r : canard) human += turns.count({r["QuAC_dialog_id"], r["Question_no"].get<int>()});

    const auto dir = scratch_dir("cli-prepare");
    const Outcome o = excord_cli({"prepare", "--quac", fixture("quac_small.json").string(), "--canard",
                                  fixture("canard_small.json").string(), "--out", (dir / "data").string()});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const json manifest = json::parse(slurp(dir / "data" / "manifest.json"));
    CHECK(manifest["dialogues"] == dialogues);
    CHECK(manifest["pairs"] == turns.size());
    CHECK(manifest["human_pairs"] == human);
    CHECK(manifest["synthetic_pairs"] == turns.size() - human);
    CHECK(count_lines(dir / "data" / "pairs.jsonl") == turns.size());
    CHECK(count_lines(dir / "data" / "dialogues.jsonl") == dialogues);
    CHECK(count_lines(dir / "data" / "rewrite_cache.jsonl") == turns.size() - human);
    CHECK(o.out.find("human pairs: " + std::to_string(human)) != std::string::npos);
}

TEST_CASE("prepare on CoQA alone makes every pair synthetic") {
    const auto dir = scratch_dir("cli-coqa");
    const Outcome o = excord_cli({"prepare", "--coqa", fixture("coqa_small.json").string(), "--out", dir.string()});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const json manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["human_pairs"] == 0);
    CHECK(manifest["synthetic_pairs"] == 5);
    for (const auto& pair : read_pairs_jsonl(dir / "pairs.jsonl")) CHECK(pair.provenance == Provenance::synthetic);
}

TEST_CASE("prepare picks inputs from a directory and rejects an empty one without writing") {
    const auto dir = scratch_dir("cli-inputdir");
    std::filesystem::create_directories(dir / "in");
    const Outcome empty = excord_cli({"prepare", "--input-dir", (dir / "in").string(), "--out", (dir / "out").string()});
    CHECK(empty.code == cli::kExitData);
    CHECK(empty.err.find("no quac") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "out"));

    std::filesystem::copy_file(fixture("quac_small.json"), dir / "in" / "quac_dev.json");
    std::filesystem::copy_file(fixture("canard_small.json"), dir / "in" / "canard_dev.json");
    const Outcome ok = excord_cli({"prepare", "--input-dir", (dir / "in").string(), "--out", (dir / "out").string()});
    REQUIRE_MESSAGE(ok.code == 0, ok.err);
    CHECK(json::parse(slurp(dir / "out" / "manifest.json"))["human_pairs"] == 5);
}

TEST_CASE("prepare without any source is a config error") {
    const auto dir = scratch_dir("cli-nosource");
    const Outcome o = excord_cli({"prepare", "--out", (dir / "out").string()});
    CHECK(o.code == cli::kExitConfig);
    CHECK_FALSE(std::filesystem::exists(dir / "out"));
}

TEST_CASE("malformed input maps to the data exit code") {
    const auto dir = scratch_dir("cli-malformed");
    spit(dir / "bad.json", "{\"data\": [");
    const Outcome o = excord_cli({"prepare", "--quac", (dir / "bad.json").string(), "--out", (dir / "out").string()});
    CHECK(o.code == cli::kExitData);
    CHECK(o.err.find("bad.json") != std::string::npos);
}

TEST_CASE("evaluate scores gold answers as predictions at 100") {
    const auto dir = scratch_dir("cli-evaluate");
    const SyntheticCorpus corpus = make_synthetic_corpus({10, 3, 0.5});
    write_dialogues_jsonl(dir / "gold.jsonl", corpus.dialogues);
    std::map<std::string, std::string> predictions;
    for (const auto& d : corpus.dialogues) {
        for (const auto& t : d.turns) predictions[t.question_id] = t.unanswerable() ? "CANNOTANSWER" : t.answer_text;
    }
    spit(dir / "pred.json", json(predictions).dump());
    const Outcome o = excord_cli({"evaluate", "--predictions", (dir / "pred.json").string(), "--gold",
                                  (dir / "gold.jsonl").string(), "--out", (dir / "report.json").string()});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const EvalReport report = report_from_json(slurp(dir / "report.json"));
    CHECK(report.overall_f1 == doctest::Approx(100.0));
    CHECK(o.out.find("100.0") != std::string::npos);
}

TEST_CASE("report prints runs side by side") {
    const auto dir = scratch_dir("cli-report");
    EvalReport a;
    a.overall_f1 = 61.24;
    a.heq_q = 57.5;
    a.heq_d = 5.0;
    EvalReport b;
    b.overall_f1 = 67.75;
    for (const auto& [name, report] : {std::pair{"baseline", a}, std::pair{"excord", b}}) {
        std::filesystem::create_directories(dir / name);
        spit(dir / name / "report.json", report_to_json(report));
    }
    const Outcome o = excord_cli({"report", (dir / "baseline").string(), (dir / "excord").string(), "--out",
                                  (dir / "table.txt").string()});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const std::string expected =
        "Model         F1   HEQ-Q   HEQ-D\n"
        "--------------------------------\n"
        "baseline    61.2    57.5     5.0\n"
        "excord      67.8       -       -\n";
    CHECK(o.out == expected);
    CHECK(slurp(dir / "table.txt") == expected);
}

TEST_CASE("train runs a mode, and excord logs a consistency term where end_to_end does not") {
    const auto dir = scratch_dir("cli-train");
    REQUIRE(excord_cli({"prepare", "--synthetic", "12", "--dev-fraction", "0.25", "--out", (dir / "data").string()})
                .code == 0);
    std::map<std::string, double> last_cons;
    for (const std::string mode : {"end_to_end", "excord"}) {
        const auto run = dir / mode;
        const Outcome o = excord_cli({"train", "--config", fixture("smoke_config.json").string(), "--data",
                                      (dir / "data").string(), "--run-dir", run.string(), "--mode", mode,
                                      "--max-steps", "6", "--eval-interval", "3"});
        REQUIRE_MESSAGE(o.code == 0, o.err);
        CHECK(std::filesystem::exists(run / "backbone.json"));
        CHECK(json::parse(slurp(run / "config.json"))["mode"] == mode);
        CHECK(json::parse(slurp(run / "config.json"))["max_steps"] == 6);
        CHECK(count_lines(run / "loss_log.jsonl") == 6);
        std::istringstream log(slurp(run / "loss_log.jsonl"));
        for (std::string line; std::getline(log, line);) last_cons[mode] = json::parse(line)["l_cons"];
    }
    CHECK(last_cons["end_to_end"] == 0.0);
    CHECK(last_cons["excord"] > 0.0);

    const Outcome predicted = excord_cli({"predict", "--run-dir", (dir / "excord").string(), "--data",
                                          (dir / "data" / "dev.jsonl").string(), "--out",
                                          (dir / "pred.json").string()});
    REQUIRE_MESSAGE(predicted.code == 0, predicted.err);
    const json pred = json::parse(slurp(dir / "pred.json"));
    std::size_t dev_turns = 0;
    for (const auto& d : read_dialogues_jsonl(dir / "data" / "dev.jsonl")) dev_turns += d.turns.size();
    CHECK(pred.size() == dev_turns);

    const Outcome piped = excord_cli({"predict", "--run-dir", (dir / "excord").string(), "--mode", "pipeline",
                                      "--rewrites", (dir / "data" / "rewrite_cache.jsonl").string(), "--data",
                                      (dir / "data" / "dev.jsonl").string(), "--out",
                                      (dir / "pred_pipeline.json").string()});
    REQUIRE_MESSAGE(piped.code == 0, piped.err);
    CHECK(piped.out.find("0 rewrite fallbacks") != std::string::npos);
}

TEST_CASE("train reports every config problem at once with the config exit code") {
    const auto dir = scratch_dir("cli-badconfig");
    REQUIRE(excord_cli({"prepare", "--synthetic", "2", "--out", (dir / "data").string()}).code == 0);
    const Outcome o = excord_cli({"train", "--data", (dir / "data").string(), "--run-dir", (dir / "run").string(),
                                  "--mode", "bogus", "--lr", "-1", "--batch-size", "0"});
    CHECK(o.code == cli::kExitConfig);
    CHECK(o.err.find("mode") != std::string::npos);
    CHECK(o.err.find("learning_rate") != std::string::npos);
    CHECK(o.err.find("batch_size") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "run"));
}

TEST_CASE("help lists subcommands and training defaults") {
    const Outcome top = excord_cli({"--help"});
    CHECK(top.code == 0);
    for (const char* sub : {"prepare", "rewrite", "train", "predict", "evaluate", "report"}) {
        CHECK(top.out.find(sub) != std::string::npos);
    }
    const Outcome train = excord_cli({"train", "--help"});
    CHECK(train.code == 0);
    CHECK(train.out.find("--lambda2 FLOAT [0.7]") != std::string::npos);
    CHECK(train.out.find("--temperature FLOAT [0.9]") != std::string::npos);
    CHECK(train.out.find("--mode TEXT [excord]") != std::string::npos);
}

TEST_CASE("unknown flags and missing subcommands are usage errors") {
    CHECK(excord_cli({}).code == cli::kExitConfig);
    CHECK(excord_cli({"train", "--no-such-flag"}).code == cli::kExitConfig);
}

TEST_CASE("rewrite handles single questions, caches and capability errors") {
    const auto dir = scratch_dir("cli-rewrite");
    const Outcome one = excord_cli({"rewrite", "--rules", fixture("leonardo_rules.json").string(), "--question",
                                    "Where did he train?", "--history", "Who was Leonardo da Vinci?",
                                    "an Italian painter"});
    REQUIRE_MESSAGE(one.code == 0, one.err);
    CHECK(one.out == "Where did Leonardo da Vinci train?\n");

    const Outcome fit = excord_cli({"rewrite", "--fit", fixture("canard_small.json").string()});
    CHECK(fit.code == cli::kExitConfig);

    const SyntheticCorpus corpus = make_synthetic_corpus({3, 1, 0.0});
    write_dialogues_jsonl(dir / "d.jsonl", corpus.dialogues);
    const std::vector<std::string> args = {"rewrite", "--data", (dir / "d.jsonl").string(), "--out",
                                           (dir / "cache.jsonl").string()};
    REQUIRE(excord_cli(args).code == 0);
    const std::size_t lines = count_lines(dir / "cache.jsonl");
    CHECK(lines > 0);
    const Outcome again = excord_cli(args);
    CHECK(again.code == 0);
    CHECK(again.out.find("(0 new") != std::string::npos);
    CHECK(count_lines(dir / "cache.jsonl") == lines);
}
