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

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hycaps {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix
{
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;  // row-major num_classes x num_classes
    std::vector<std::string> class_names;

    std::uint64_t at(std::size_t truth, std::size_t predicted) const
    {
        return counts[truth * num_classes + predicted];
    }
    std::uint64_t total() const;
    std::uint64_t support(std::size_t truth) const;
};

ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                          std::size_t num_classes, std::vector<std::string> class_names = {});

struct ClassMetrics
{
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

struct MetricAverages
{
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport
{
    std::vector<ClassMetrics> per_class;
    MetricAverages macro_avg;     // unweighted mean over all classes
    MetricAverages weighted_avg;  // weighted by true-class support
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    // Zero-denominator metrics are reported as 0 and listed here.
    std::vector<std::string> warnings;
};

// Throws std::invalid_argument on an empty matrix.
EvalReport compute_report(const ConfusionMatrix& cm);

// Fixed three-decimal formatting with ties rounded away from zero.
std::string format_metric(double value);

// Macro and weighted rows per model, in the layout of a results table.
std::string render_table(std::span<const std::pair<std::string, EvalReport>> reports);

// One tab-separated record per model, scope and metric:
// "model<TAB>scope<TAB>metric<TAB>value" with scope in {macro, weighted,
// overall, class:<name>}.
std::string report_records(const std::string& model, const EvalReport& report);

// Reads the macro/weighted/overall records written by report_records; the
// per-class section and confusion matrix are not reconstructed.
std::vector<std::pair<std::string, EvalReport>> parse_report_records(const std::string& text);

// Grid file: comma-separated class-name header, then one row of integer
// counts per true class.
std::string confusion_grid(const ConfusionMatrix& cm);
ConfusionMatrix parse_confusion_grid(const std::string& text);

}  // namespace hycaps
