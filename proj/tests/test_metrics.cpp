/********************************************************************************
* Copyright 2026 The hycaps Authors
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*    http://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
********************************************************************************/

#include <gtest/gtest.h>

#include <algorithm>
#include <iterator>
#include <numeric>
#include <sstream>

#include "hycaps/metrics.hpp"
#include "hycaps/rng.hpp"
#include "metric_oracle.hpp"

using namespace hycaps;
using hycaps::testing::brute_force_metrics;

namespace {

ConfusionMatrix matrix(std::size_t k, std::vector<std::uint64_t> counts)
{
    ConfusionMatrix cm;
    cm.num_classes = k;
    cm.counts = std::move(counts);
    for (std::size_t c = 0; c < k; ++c) {
        cm.class_names.push_back("c" + std::to_string(c));
    }
    return cm;
}

ConfusionMatrix random_matrix(Rng& rng)
{
    const std::size_t k = 2 + rng.below(6);
    std::vector<std::uint64_t> counts(k * k);
    for (auto& c : counts) {
        // Sparse entries exercise the zero-denominator rules.
        c = rng.bernoulli(0.3) ? 0 : rng.below(20);
    }
    if (std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}) == 0) {
        counts[0] = 1;
    }
    return matrix(k, counts);
}

// Last three whitespace-separated cells of every data row.
std::vector<std::vector<std::string>> metric_cells(const std::string& table)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream lines(table);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        std::istringstream words(line);
        std::vector<std::string> cells{std::istream_iterator<std::string>(words), {}};
        rows.emplace_back(cells.end() - 3, cells.end());
    }
    return rows;
}

EvalReport aggregates(MetricAverages macro, MetricAverages weighted)
{
    EvalReport r;
    r.macro_avg = macro;
    r.weighted_avg = weighted;
    return r;
}

}  // namespace

TEST(Confusion, HandCount)
{
    const std::vector<std::size_t> truth = {0, 0, 1}, pred = {0, 1, 1};
    const auto cm = confusion(truth, pred, 2);
    EXPECT_EQ(cm.counts, (std::vector<std::uint64_t>{1, 1, 0, 1}));
    EXPECT_EQ(cm.total(), 3u);
    EXPECT_EQ(cm.class_names, (std::vector<std::string>{"0", "1"}));
}

TEST(Confusion, PerfectPredictionsAreDiagonal)
{
    const std::vector<std::size_t> labels = {0, 1, 2, 2, 1};
    const auto cm = confusion(labels, labels, 3);
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t p = 0; p < 3; ++p) {
            EXPECT_EQ(cm.at(t, p) > 0, t == p);
        }
    }
    const auto r = compute_report(cm);
    EXPECT_EQ(r.macro_avg.f1, 1.0);
    EXPECT_EQ(r.weighted_avg.precision, 1.0);
    EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Confusion, RowSumsAreSupports)
{
    Rng rng(41);
    for (int t = 0; t < 100; ++t) {
        const std::size_t k = 2 + rng.below(8), n = rng.below(200);
        std::vector<std::size_t> truth(n), pred(n);
        std::vector<std::uint64_t> support(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = rng.below(k);
            pred[i] = rng.below(k);
            ++support[truth[i]];
        }
        const auto cm = confusion(truth, pred, k);
        for (std::size_t c = 0; c < k; ++c) {
            EXPECT_EQ(cm.support(c), support[c]);
        }
        EXPECT_EQ(cm.total(), n);
    }
}

TEST(Confusion, Errors)
{
    const std::vector<std::size_t> a = {0, 1}, b = {0}, bad = {0, 2};
    EXPECT_THROW(confusion(a, b, 2), std::invalid_argument);
    EXPECT_THROW(confusion(a, bad, 2), std::invalid_argument);
    EXPECT_THROW(confusion(a, a, 2, {"x"}), std::invalid_argument);
}

TEST(ComputeReport, HandExample)
{
    const auto r = compute_report(matrix(2, {1, 1, 0, 1}));
    EXPECT_EQ(r.per_class[0].precision, 1.0);
    EXPECT_EQ(r.per_class[0].recall, 0.5);
    EXPECT_EQ(r.per_class[1].precision, 0.5);
    EXPECT_EQ(r.per_class[1].recall, 1.0);
    EXPECT_DOUBLE_EQ(r.per_class[0].f1, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.per_class[1].f1, 2.0 / 3.0);
    EXPECT_EQ(r.macro_avg.f1, 2.0 / 3.0);
    EXPECT_EQ(r.accuracy, 2.0 / 3.0);
}

TEST(ComputeReport, ZeroSupportClassCountsAsZero)
{
    const auto r = compute_report(matrix(3, {2, 0, 1, 0, 1, 0, 0, 0, 0}));
    EXPECT_EQ(r.per_class[2].recall, 0.0);
    EXPECT_EQ(r.per_class[2].precision, 0.0);
    EXPECT_EQ(r.per_class[2].f1, 0.0);
    EXPECT_FALSE(r.warnings.empty());
    EXPECT_NEAR(r.macro_avg.f1, (0.8 + 1.0 + 0.0) / 3.0, 1e-15);
}

TEST(ComputeReport, EmptyMatrixRejected)
{
    EXPECT_THROW(compute_report(matrix(2, {0, 0, 0, 0})), std::invalid_argument);
    EXPECT_THROW(compute_report(ConfusionMatrix{}), std::invalid_argument);
}

TEST(ComputeReport, MatchesBruteForceOracle)
{
    Rng rng(42);
    for (int t = 0; t < 1000; ++t) {
        const auto cm = random_matrix(rng);
        const auto r = compute_report(cm);
        const auto o = brute_force_metrics(cm.counts, cm.num_classes);
        for (std::size_t c = 0; c < cm.num_classes; ++c) {
            ASSERT_NEAR(r.per_class[c].precision, o.precision[c], 1e-12);
            ASSERT_NEAR(r.per_class[c].recall, o.recall[c], 1e-12);
            ASSERT_NEAR(r.per_class[c].f1, o.f1[c], 1e-12);
        }
        ASSERT_NEAR(r.macro_avg.precision, o.macro_p, 1e-12);
        ASSERT_NEAR(r.macro_avg.recall, o.macro_r, 1e-12);
        ASSERT_NEAR(r.macro_avg.f1, o.macro_f1, 1e-12);
        ASSERT_NEAR(r.weighted_avg.precision, o.weighted_p, 1e-12);
        ASSERT_NEAR(r.weighted_avg.recall, o.weighted_r, 1e-12);
        ASSERT_NEAR(r.weighted_avg.f1, o.weighted_f1, 1e-12);
        ASSERT_NEAR(r.accuracy, o.accuracy, 1e-12);
    }
}

TEST(ComputeReport, MacroF1PermutationInvariant)
{
    Rng rng(43);
    for (int t = 0; t < 200; ++t) {
        const auto cm = random_matrix(rng);
        const auto k = cm.num_classes;
        std::vector<std::size_t> perm(k);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(std::span<std::size_t>(perm));
        std::vector<std::uint64_t> moved(k * k);
        for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t b = 0; b < k; ++b) {
                moved[perm[a] * k + perm[b]] = cm.at(a, b);
            }
        }
        EXPECT_NEAR(compute_report(cm).macro_avg.f1, compute_report(matrix(k, moved)).macro_avg.f1, 1e-12);
    }
}

TEST(ComputeReport, WeightedEqualsMacroUnderEqualSupport)
{
    Rng rng(44);
    for (int t = 0; t < 200; ++t) {
        const std::size_t k = 2 + rng.below(6), support = 1 + rng.below(15);
        std::vector<std::uint64_t> counts(k * k, 0);
        for (std::size_t row = 0; row < k; ++row) {
            for (std::size_t i = 0; i < support; ++i) {
                ++counts[row * k + rng.below(k)];
            }
        }
        const auto r = compute_report(matrix(k, counts));
        EXPECT_NEAR(r.weighted_avg.precision, r.macro_avg.precision, 1e-12);
        EXPECT_NEAR(r.weighted_avg.recall, r.macro_avg.recall, 1e-12);
        EXPECT_NEAR(r.weighted_avg.f1, r.macro_avg.f1, 1e-12);
    }
}

TEST(ComputeReport, AccuracyEqualsWeightedRecall)
{
    Rng rng(45);
    for (int t = 0; t < 500; ++t) {
        const auto r = compute_report(random_matrix(rng));
        EXPECT_NEAR(r.accuracy, r.weighted_avg.recall, 1e-12);
    }
}

TEST(ComputeReport, MetricsWithinUnitInterval)
{
    Rng rng(46);
    for (int t = 0; t < 500; ++t) {
        const auto r = compute_report(random_matrix(rng));
        for (const auto& m : r.per_class) {
            for (double v : {m.precision, m.recall, m.f1}) {
                ASSERT_GE(v, 0.0);
                ASSERT_LE(v, 1.0);
            }
        }
    }
}

TEST(FormatMetric, RoundsHalfUp)
{
    EXPECT_EQ(format_metric(0.9175), "0.918");
    EXPECT_EQ(format_metric(0.8915), "0.892");
    EXPECT_EQ(format_metric(1.0), "1.000");
    EXPECT_EQ(format_metric(0.0), "0.000");
    EXPECT_EQ(format_metric(2.0 / 3.0), "0.667");
}

TEST(RenderTable, PerfectReportRows)
{
    const std::vector<std::pair<std::string, EvalReport>> reports = {
        {"model", aggregates({1, 1, 1}, {1, 1, 1})}};
    const auto table = render_table(reports);
    const std::vector<std::string> ones = {"1.000", "1.000", "1.000"};
    EXPECT_EQ(metric_cells(table), (std::vector<std::vector<std::string>>{ones, ones}));
    EXPECT_NE(table.find("Macro Avg"), std::string::npos);
    EXPECT_NE(table.find("Weighted Avg"), std::string::npos);
}

TEST(RenderTable, PublishedAggregatesRoundTrip)
{
    // Macro and weighted precision/recall/F1 of the three published models.
    const std::vector<std::pair<std::string, EvalReport>> reports = {
        {"baseline", aggregates({0.889, 0.894, 0.891}, {0.892, 0.891, 0.891})},
        {"frozen_hybrid", aggregates({0.894, 0.897, 0.896}, {0.897, 0.897, 0.896})},
        {"unfrozen_hybrid", aggregates({0.917, 0.914, 0.918}, {0.916, 0.915, 0.918})},
    };
    const std::vector<std::vector<std::string>> want = {
        {"0.889", "0.894", "0.891"}, {"0.892", "0.891", "0.891"}, {"0.894", "0.897", "0.896"},
        {"0.897", "0.897", "0.896"}, {"0.917", "0.914", "0.918"}, {"0.916", "0.915", "0.918"},
    };
    EXPECT_EQ(metric_cells(render_table(reports)), want);
}

TEST(ReportRecords, RoundTripAggregates)
{
    const auto r = compute_report(matrix(3, {5, 1, 0, 2, 7, 1, 0, 0, 4}));
    const auto parsed = parse_report_records(report_records("exp", r));
    ASSERT_EQ(parsed.size(), 1u);
    EXPECT_EQ(parsed[0].first, "exp");
    EXPECT_EQ(parsed[0].second.macro_avg.f1, r.macro_avg.f1);
    EXPECT_EQ(parsed[0].second.weighted_avg.recall, r.weighted_avg.recall);
    EXPECT_EQ(parsed[0].second.accuracy, r.accuracy);
    EXPECT_THROW(parse_report_records("only\ttwo\n"), std::invalid_argument);
}

TEST(ConfusionGrid, RoundTrip)
{
    Rng rng(47);
    for (int t = 0; t < 50; ++t) {
        const auto cm = random_matrix(rng);
        const auto back = parse_confusion_grid(confusion_grid(cm));
        EXPECT_EQ(back.counts, cm.counts);
        EXPECT_EQ(back.class_names, cm.class_names);
    }
    EXPECT_THROW(parse_confusion_grid("a,b\n1,2\n3\n"), std::invalid_argument);
    EXPECT_THROW(parse_confusion_grid(""), std::invalid_argument);
}
