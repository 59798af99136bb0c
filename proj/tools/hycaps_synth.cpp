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

// hycaps-synth: writes a synthetic <class>/<image>.png tree for `hycaps prepare`.

#include <CLI11.hpp>
#include <fmt/core.h>

#include <exception>
#include <string>

#include "hycaps/synthetic.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Synthetic image tree generator"};
    std::string out;
    std::string task = "waste";
    std::size_t per_class = 30;
    std::uint64_t seed = 0;
    hycaps::SyntheticSpec spec;
    app.add_option("--out", out, "output root")->required();
    app.add_option("--seed", seed, "random seed")->required();
    app.add_option("--task", task, "waste or shapes")->check(CLI::IsMember({"waste", "shapes"}));
    app.add_option("--per-class", per_class, "images per class")->check(CLI::PositiveNumber);
    app.add_option("--size", spec.image_size, "image side in pixels")->check(CLI::PositiveNumber);
    app.add_option("--noise", spec.noise_std, "Gaussian noise sigma, 8-bit units")->check(CLI::NonNegativeNumber);
    CLI11_PARSE(app, argc, argv);

    try {
        spec.task = hycaps::parse_synthetic_task(task);
        hycaps::write_synthetic_tree(out, spec, per_class, seed);
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
