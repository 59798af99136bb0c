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

#include "hycaps/metrics.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hycaps {

std::uint64_t ConfusionMatrix::total() const
{
    std::uint64_t n = 0;
    for (auto c : counts) {
        n += c;
    }
    return n;
}

std::uint64_t ConfusionMatrix::support(std::size_t truth) const
{
    std::uint64_t n = 0;
    for (std::size_t p = 0; p < num_classes; ++p) {
        n += at(truth, p);
    }
    return n;
}

ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                          std::size_t num_classes, std::vector<std::string> class_names)
{
    if (truth.size() != predicted.size()) {
        throw std::invalid_argument("confusion: " + std::to_string(truth.size()) +
                                    " true labels vs " + std::to_string(predicted.size()) +
                                    " predictions");
    }
    if (!class_names.empty() && class_names.size() != num_classes) {
        throw std::invalid_argument("confusion: class name count does not match num_classes");
    }
    ConfusionMatrix cm;
    cm.num_classes = num_classes;
    cm.counts.assign(num_classes * num_classes, 0);
    cm.class_names = std::move(class_names);
    if (cm.class_names.empty()) {
        for (std::size_t c = 0; c < num_classes; ++c) {
            cm.class_names.push_back(std::to_string(c));
        }
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= num_classes || predicted[i] >= num_classes) {
            throw std::invalid_argument("confusion: label out of range at position " +
                                        std::to_string(i));
        }
        ++cm.counts[truth[i] * num_classes + predicted[i]];
    }
    return cm;
}

EvalReport compute_report(const ConfusionMatrix& cm)
{
    const auto total = cm.total();
    if (cm.num_classes == 0 || total == 0) {
        throw std::invalid_argument("compute_report: empty confusion matrix");
    }
    const auto k = cm.num_classes;
    EvalReport r;
    r.confusion = cm;
    std::uint64_t trace = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const auto tp = cm.at(c, c);
        trace += tp;
        std::uint64_t predicted = 0;
        for (std::size_t t = 0; t < k; ++t) {
            predicted += cm.at(t, c);
        }
        ClassMetrics m;
        m.support = cm.support(c);
        const auto& name = cm.class_names.empty() ? std::to_string(c) : cm.class_names[c];
        if (predicted > 0) {
            m.precision = static_cast<double>(tp) / static_cast<double>(predicted);
        } else {
            r.warnings.push_back("precision of class '" + name + "' undefined (no predictions), set to 0");
        }
        if (m.support > 0) {
            m.recall = static_cast<double>(tp) / static_cast<double>(m.support);
        } else {
            r.warnings.push_back("recall of class '" + name + "' undefined (no support), set to 0");
        }
        if (m.precision + m.recall > 0.0) {
            m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        }
        r.per_class.push_back(m);
    }
    for (const auto& m : r.per_class) {
        r.macro_avg.precision += m.precision;
        r.macro_avg.recall += m.recall;
        r.macro_avg.f1 += m.f1;
        const double w = static_cast<double>(m.support);
        r.weighted_avg.precision += w * m.precision;
        r.weighted_avg.recall += w * m.recall;
        r.weighted_avg.f1 += w * m.f1;
    }
    const double kk = static_cast<double>(k);
    const double tt = static_cast<double>(total);
    r.macro_avg = {r.macro_avg.precision / kk, r.macro_avg.recall / kk, r.macro_avg.f1 / kk};
    r.weighted_avg = {r.weighted_avg.precision / tt, r.weighted_avg.recall / tt,
                      r.weighted_avg.f1 / tt};
    r.accuracy = static_cast<double>(trace) / tt;
    return r;
}

std::string format_metric(double value)
{
    // the epsilon absorbs binary representation error, e.g. 0.9175 -> 917.4999...
    const double scaled = std::floor(std::abs(value) * 1000.0 + 0.5 + 1e-9);
    return fmt::format("{}{:.3f}", value < 0 ? "-" : "", scaled / 1000.0);
}

std::string render_table(std::span<const std::pair<std::string, EvalReport>> reports)
{
    std::size_t width = 5;
    for (const auto& [name, _] : reports) {
        width = std::max(width, name.size());
    }
    std::string out = fmt::format("{:<{}}  {:<12}  {:>9}  {:>6}  {:>8}\n", "Model", width, "Metric",
                                  "Precision", "Recall", "F1-score");
    for (const auto& [name, r] : reports) {
        const std::pair<const char*, const MetricAverages*> rows[] = {{"Macro Avg", &r.macro_avg},
                                                                      {"Weighted Avg", &r.weighted_avg}};
        for (const auto& [label, avg] : rows) {
            out += fmt::format("{:<{}}  {:<12}  {:>9}  {:>6}  {:>8}\n", name, width, label,
                               format_metric(avg->precision), format_metric(avg->recall),
                               format_metric(avg->f1));
        }
    }
    return out;
}

std::string report_records(const std::string& model, const EvalReport& report)
{
    std::string out;
    auto put = [&](const std::string& scope, const char* metric, double v) {
        out += fmt::format("{}\t{}\t{}\t{:.17g}\n", model, scope, metric, v);
    };
    put("macro", "precision", report.macro_avg.precision);
    put("macro", "recall", report.macro_avg.recall);
    put("macro", "f1", report.macro_avg.f1);
    put("weighted", "precision", report.weighted_avg.precision);
    put("weighted", "recall", report.weighted_avg.recall);
    put("weighted", "f1", report.weighted_avg.f1);
    put("overall", "accuracy", report.accuracy);
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const auto& m = report.per_class[c];
        const auto scope = "class:" + (c < report.confusion.class_names.size()
                                           ? report.confusion.class_names[c]
                                           : std::to_string(c));
        put(scope, "precision", m.precision);
        put(scope, "recall", m.recall);
        put(scope, "f1", m.f1);
        put(scope, "support", static_cast<double>(m.support));
    }
    return out;
}

std::vector<std::pair<std::string, EvalReport>> parse_report_records(const std::string& text)
{
    std::vector<std::pair<std::string, EvalReport>> out;
    std::map<std::string, std::size_t> index;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream fields(line);
        std::string model, scope, metric, value;
        if (!std::getline(fields, model, '\t') || !std::getline(fields, scope, '\t') ||
            !std::getline(fields, metric, '\t') || !std::getline(fields, value)) {
            throw std::invalid_argument("report record line " + std::to_string(line_no) +
                                        " is malformed");
        }
        auto [it, inserted] = index.emplace(model, out.size());
        if (inserted) {
            out.emplace_back(model, EvalReport{});
        }
        auto& r = out[it->second].second;
        const double v = std::stod(value);
        MetricAverages* avg = scope == "macro" ? &r.macro_avg : scope == "weighted" ? &r.weighted_avg : nullptr;
        if (avg != nullptr) {
            if (metric == "precision") {
                avg->precision = v;
            } else if (metric == "recall") {
                avg->recall = v;
            } else if (metric == "f1") {
                avg->f1 = v;
            }
        } else if (scope == "overall" && metric == "accuracy") {
            r.accuracy = v;
        }
    }
    return out;
}

std::string confusion_grid(const ConfusionMatrix& cm)
{
    std::string out;
    for (std::size_t c = 0; c < cm.num_classes; ++c) {
        out += (c ? "," : "") + cm.class_names[c];
    }
    out += "\n";
    for (std::size_t t = 0; t < cm.num_classes; ++t) {
        for (std::size_t p = 0; p < cm.num_classes; ++p) {
            out += fmt::format("{}{}", p ? "," : "", cm.at(t, p));
        }
        out += "\n";
    }
    return out;
}

ConfusionMatrix parse_confusion_grid(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    ConfusionMatrix cm;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("confusion grid is empty");
    }
    {
        std::istringstream header(line);
        std::string name;
        while (std::getline(header, name, ',')) {
            cm.class_names.push_back(name);
        }
    }
    cm.num_classes = cm.class_names.size();
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string cell;
        std::size_t n = 0;
        while (std::getline(row, cell, ',')) {
            cm.counts.push_back(std::stoull(cell));
            ++n;
        }
        if (n != cm.num_classes) {
            throw std::invalid_argument("confusion grid row has " + std::to_string(n) + " cells");
        }
    }
    if (cm.counts.size() != cm.num_classes * cm.num_classes) {
        throw std::invalid_argument("confusion grid is not square");
    }
    return cm;
}

}  // namespace hycaps
