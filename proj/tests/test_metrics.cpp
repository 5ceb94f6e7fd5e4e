#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include <spdlog/spdlog.h>

#include "excord/errors.hpp"
#include "excord/metrics.hpp"
#include "metrics_golden.hpp"

using namespace excord;

using testing::kGolden;
using testing::Golden;

TEST_CASE("answer normalization") {
    CHECK(normalize_answer("The  Quick, brown FOX!") == "quick brown fox");
    CHECK(normalize_answer("an a the") == "");
    CHECK(normalize_answer("Theatre") == "theatre");
}

TEST_CASE("token F1 golden cases") {
    REQUIRE(kGolden.size() >= 20);
    for (const Golden& g : kGolden) {
        CAPTURE(g.prediction);
        CHECK(token_f1(g.prediction, g.references) == doctest::Approx(g.f1).epsilon(1e-12));
    }
    CHECK_THROWS_AS(token_f1("x", std::vector<std::string>{}), ArgumentError);
}

TEST_CASE("leave-one-out and human F1") {
    const std::vector<std::string> refs = {"red car", "blue car", "red bus"};
    // Drop each reference in turn: max(0.5, 0.5), max(1, 0.5), max(1, 0.5).
    CHECK(leave_one_out_f1("red car", refs) == doctest::Approx((0.5 + 1.0 + 1.0) / 3.0));
    // Each reference against the others: 0.5, 0.5, 0.5.
    CHECK(human_f1(refs).value() == doctest::Approx(0.5));
    CHECK_FALSE(human_f1(std::vector<std::string>{"only"}).has_value());
    CHECK(leave_one_out_f1("red", std::vector<std::string>{"red"}) == 1.0);
}

TEST_CASE("HEQ counts questions and whole dialogues") {
    const std::vector<QuestionResult> results = {
        {"q1", "d1", 0.9, 0.8, ""}, {"q2", "d1", 0.5, 0.5, ""},  // d1: both meet human
        {"q3", "d2", 0.4, 0.6, ""}, {"q4", "d2", 1.0, 0.6, ""},  // d2: one misses
    };
    const HeqScores scores = heq(results);
    CHECK(scores.heq_q == doctest::Approx(75.0));
    CHECK(scores.heq_d == doctest::Approx(50.0));
    CHECK_THROWS_AS(heq(std::vector<QuestionResult>{}), ArgumentError);
    CHECK_THROWS_AS(heq(std::vector<QuestionResult>{{"q", "d", 1.0, std::nullopt, ""}}), ArgumentError);
}

TEST_CASE("HEQ on a single dialogue with one lost question") {
    const std::vector<QuestionResult> results = {
        {"q1", "d", 1.0, 0.5, ""}, {"q2", "d", 0.7, 0.7, ""}, {"q3", "d", 0.2, 0.9, ""}};
    const HeqScores s = heq(results);
    CHECK(s.heq_q == doctest::Approx(200.0 / 3.0));
    CHECK(s.heq_d == 0.0);
}

TEST_CASE("HEQ-D never exceeds HEQ-Q when dialogues have equal length") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<QuestionResult> results;
        const int dialogues = 1 + static_cast<int>(rng() % 6);
        const int turns = 1 + static_cast<int>(rng() % 12);
        for (int d = 0; d < dialogues; ++d) {
            for (int t = 0; t < turns; ++t) {
                results.push_back({"q" + std::to_string(d) + "_" + std::to_string(t), "d" + std::to_string(d), u(rng),
                                   u(rng), ""});
            }
        }
        const HeqScores s = heq(results);
        CHECK(s.heq_d <= s.heq_q + 1e-12);
    }
}

TEST_CASE("HEQ-D can exceed HEQ-Q when dialogue lengths differ") {
    // A short dialogue that passes and a long one that fails.
    std::vector<QuestionResult> results = {{"s", "short", 1.0, 0.5, ""}};
    for (int t = 0; t < 10; ++t) results.push_back({"l" + std::to_string(t), "long", 0.0, 0.5, ""});
    const HeqScores s = heq(results);
    CHECK(s.heq_q == doctest::Approx(100.0 / 11.0));
    CHECK(s.heq_d == doctest::Approx(50.0));
}

TEST_CASE("aggregate reports per-domain scores and hides HEQ without human F1") {
    spdlog::set_level(spdlog::level::off);
    const std::vector<QuestionResult> results = {
        {"q1", "d1", 1.0, std::nullopt, "cnn"},
        {"q2", "d1", 0.5, std::nullopt, "cnn"},
        {"q3", "d2", 0.0, std::nullopt, "wikipedia"},
        {"q4", "d3", 0.25, std::nullopt, "blog"},
    };
    const auto domains = coqa_domains();
    const EvalReport report = aggregate(results, domains);
    CHECK(report.overall_f1 == doctest::Approx(43.75));
    CHECK(report.per_domain_f1.at("cnn") == doctest::Approx(75.0));
    CHECK(report.per_domain_f1.at("wikipedia") == doctest::Approx(0.0));
    CHECK(report.per_domain_f1.at("other") == doctest::Approx(25.0));
    CHECK_FALSE(report.heq_q.has_value());
    CHECK(report.question_count == 4);
    CHECK(report.dialogue_count == 3);
    CHECK(aggregate(results).per_domain_f1.empty());
}

TEST_CASE("scoring predictions against gold dialogues") {
    spdlog::set_level(spdlog::level::off);
    Dialogue d;
    d.id = "d";
    d.document = Document::make("d", "The cat sat on the mat.");
    d.turns.push_back({1, "d_q#0", "Who sat?", "The cat", 0, 7, {"The cat", "cat"}});
    d.turns.push_back({2, "d_q#1", "Where?", "the mat", 15, 22, {"the mat"}});
    const std::vector<Dialogue> gold = {d};
    const auto results = score_predictions({{"d_q#0", "cat"}, {"d_q#1", "mat"}}, gold);
    REQUIRE(results.size() == 2);
    CHECK(results[0].model_f1 == 1.0);
    CHECK(results[0].human_f1.value() == 1.0);
    CHECK_FALSE(results[1].human_f1.has_value());
    const auto missing = score_predictions({{"d_q#0", "cat"}}, gold);
    CHECK(missing[1].model_f1 == 0.0);
}

TEST_CASE("report JSON and table layout") {
    EvalReport a;
    a.overall_f1 = 67.12;
    a.heq_q = 63.04;
    a.heq_d = 9.96;
    a.question_count = 10;
    a.dialogue_count = 2;
    EvalReport b;
    b.overall_f1 = 40.0;
    const EvalReport back = report_from_json(report_to_json(a));
    CHECK(back.overall_f1 == doctest::Approx(67.1));
    CHECK(back.heq_q.value() == doctest::Approx(63.0));
    CHECK(report_from_json(report_to_json(b)).heq_q == std::nullopt);

    const std::vector<std::pair<std::string, EvalReport>> rows = {{"excord", a}, {"end_to_end", b}};
    const std::string expected =
        "Model           F1   HEQ-Q   HEQ-D\n"
        "----------------------------------\n"
        "excord        67.1    63.0    10.0\n"
        "end_to_end    40.0       -       -\n";
    CHECK(format_report_table(rows) == expected);
}
